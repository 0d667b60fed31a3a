fn main() {
    std::process::exit(stealthlqg::cli::run(std::env::args_os()));
}
