fn main() -> std::process::ExitCode {
    fundaml::cli::main()
}
