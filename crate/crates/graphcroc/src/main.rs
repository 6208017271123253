fn main() {
    std::process::exit(graphcroc::cli::run(std::env::args_os()));
}
