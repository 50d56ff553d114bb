fn main() {
    std::process::exit(overtake_cli::run(std::env::args_os()));
}
