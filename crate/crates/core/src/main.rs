fn main() {
    std::process::exit(sdrlab::cli::run(std::env::args_os()));
}
