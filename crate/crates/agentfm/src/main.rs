fn main() {
    std::process::exit(agentfm::cli::run());
}
