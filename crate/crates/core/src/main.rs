fn main() {
    std::process::exit(probdr::cli::run(std::env::args_os()));
}
