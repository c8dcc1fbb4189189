fn main() {
    std::process::exit(uqkit_cli::run(std::env::args_os()));
}
