fn main() {
    std::process::exit(rpr_cli::run(std::env::args_os()));
}
