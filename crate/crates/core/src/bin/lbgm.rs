fn main() {
    std::process::exit(lbgm::cli::run(std::env::args_os()));
}
