fn main() {
    std::process::exit(wheelleg_cli::run(std::env::args_os()));
}
