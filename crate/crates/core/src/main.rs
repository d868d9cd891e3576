fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(sevenleague::harness::cli_main(&argv));
}
