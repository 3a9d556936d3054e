fn main() {
    std::process::exit(assoc4d_cli::run(std::env::args_os()));
}
