fn main() {
    std::process::exit(nes_core::cli::main_with_args(std::env::args_os()));
}
