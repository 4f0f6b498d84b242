fn main() {
    std::process::exit(omnitraj_cli::main_with(std::env::args_os()));
}
