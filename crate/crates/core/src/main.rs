fn main() {
    std::process::exit(npcure::cli::main_with_args(std::env::args_os()));
}
