fn main() {
    let code = stackelberg_heat_cli::run(std::env::args_os(), std::io::stdin().lock());
    std::process::exit(code);
}
