fn main() {
    let code = maskrnn::cli::main_with_args(std::env::args().collect());
    std::process::exit(code);
}
