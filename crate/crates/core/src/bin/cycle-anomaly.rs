fn main() {
    std::process::exit(cycle_anomaly::cli::run_command(std::env::args_os()));
}
