fn main() {
    std::process::exit(sida_cli::run(std::env::args_os()));
}
