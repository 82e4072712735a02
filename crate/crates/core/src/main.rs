fn main() -> std::process::ExitCode {
    inpaint::cli::run()
}
