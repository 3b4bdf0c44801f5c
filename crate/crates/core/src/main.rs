fn main() -> std::process::ExitCode {
    ntbea::cli::main_entry()
}
