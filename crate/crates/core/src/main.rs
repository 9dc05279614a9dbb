fn main() {
    std::process::exit(gcdm::cli::dispatch(std::env::args_os()));
}
