fn main() {
    std::process::exit(xtscope_cli::run(std::env::args_os()));
}
