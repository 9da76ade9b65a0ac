fn main() {
    std::process::exit(relkin::cli::run_cli(std::env::args_os()));
}
