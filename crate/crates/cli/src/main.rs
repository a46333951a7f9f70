fn main() {
    std::process::exit(exosim::main_with_args(std::env::args_os()));
}
