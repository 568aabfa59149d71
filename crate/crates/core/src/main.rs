fn main() {
    std::process::exit(llmrg::cli::run(std::env::args_os()));
}
