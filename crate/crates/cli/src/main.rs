fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(trafficast_cli::run(args));
}
