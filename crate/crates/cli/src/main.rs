fn main() {
    std::process::exit(anderloc_cli::run(std::env::args_os()));
}
