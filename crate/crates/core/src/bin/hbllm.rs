fn main() {
    std::process::exit(hbllm::cli::run(std::env::args_os()));
}
