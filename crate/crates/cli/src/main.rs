fn main() {
    std::process::exit(darviz_cli::run(std::env::args_os()));
}
