// Regenerates the bundled demo table (data/toy_epitopes.tsv).

#include <cstdint>
#include <iostream>
#include <string>

#include "epi/toycorpus.hpp"

int main(int argc, char** argv) {
    std::string out = "data/toy_epitopes.tsv";
    std::size_t n = 1000;
    std::uint64_t seed = 2024;
    bool noise = true;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--out" && i + 1 < argc) {
            out = argv[++i];
        } else if (arg == "--n" && i + 1 < argc) {
            n = std::stoull(argv[++i]);
        } else if (arg == "--seed" && i + 1 < argc) {
            seed = std::stoull(argv[++i]);
        } else if (arg == "--clean") {
            noise = false;
        } else {
            std::cerr << "usage: epikit-toygen [--out path] [--n count] [--seed s] [--clean]\n";
            return 2;
        }
    }
    try {
        epi::toy::write_toy_table(out, n, seed, noise);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    std::cerr << "wrote " << out << '\n';
    return 0;
}
