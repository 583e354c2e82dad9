fn main() {
    std::process::exit(polylearn::cli::run(std::env::args_os()));
}
