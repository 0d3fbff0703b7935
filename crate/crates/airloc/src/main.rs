fn main() {
    std::process::exit(airloc::main_with_args(std::env::args_os()));
}
