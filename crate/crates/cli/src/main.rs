fn main() {
    std::process::exit(atelier::cli::run(std::env::args_os()));
}
