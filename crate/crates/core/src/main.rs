fn main() {
    std::process::exit(dqn_classify::cli::run(std::env::args_os()));
}
