fn main() {
    std::process::exit(sentitrade::cli::run(std::env::args_os()));
}
