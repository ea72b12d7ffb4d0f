fn main() {
    std::process::exit(anchorlm::cli::run(std::env::args_os()));
}
