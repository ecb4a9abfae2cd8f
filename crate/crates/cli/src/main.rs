fn main() {
    std::process::exit(mmm_cli::run(std::env::args_os()));
}
