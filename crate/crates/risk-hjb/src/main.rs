fn main() {
    std::process::exit(risk_hjb::cli::run_main());
}
