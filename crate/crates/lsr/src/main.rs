fn main() {
    std::process::exit(lsr::cli::run_from(std::env::args_os()));
}
