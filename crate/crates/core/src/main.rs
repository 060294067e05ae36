fn main() {
    std::process::exit(gfkit::cli::main_with(std::env::args_os()));
}
