fn main() {
    std::process::exit(pointdrop::cli::main(std::env::args_os()));
}
