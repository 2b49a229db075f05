fn main() {
    std::process::exit(btts_cli::run(std::env::args_os()));
}
