fn main() {
    std::process::exit(msc_sampler::cli::main());
}
