fn main() {
    std::process::exit(trackctl::cli::run(std::env::args_os()));
}
