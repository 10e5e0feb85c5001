// Minimal external predictor speaking the {input} -> {output} NRRD protocol.
//
//   stub_predictor copy    IN OUT     input values clamped to [0,1]
//   stub_predictor zeros   IN OUT     all-zero map (null baseline)
//   stub_predictor fail    IN OUT     exits 1 without output
//   stub_predictor sleep   IN OUT S   sleeps S seconds, then behaves like zeros
//   stub_predictor badgrid IN OUT     output shifted by one voxel

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>

#include "segbench/nrrd.hpp"

int main(int argc, char** argv) {
    using namespace segbench;
    if (argc < 4) {
        std::cerr << "usage: stub_predictor copy|zeros|fail|sleep|badgrid INPUT OUTPUT [SECONDS]\n";
        return 64;
    }
    const std::string mode = argv[1];
    try {
        if (mode == "fail") {
            std::cerr << "stub predictor: failing on request\n";
            return 1;
        }
        if (mode == "sleep") std::this_thread::sleep_for(std::chrono::duration<double>(argc > 4 ? std::atof(argv[4]) : 60.0));
        Volume in = nrrd::read_volume(argv[2]);
        Image<float> out(in.grid());
        if (mode == "copy") {
            for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::clamp(in[i], 0.0f, 1.0f);
        } else if (mode == "badgrid") {
            Grid g = in.grid();
            g.origin += g.orientation * g.spacing;
            out = Image<float>(g);
        } else if (mode != "zeros" && mode != "sleep") {
            std::cerr << "stub predictor: unknown mode '" << mode << "'\n";
            return 64;
        }
        nrrd::write(argv[3], ProbabilityMap(std::move(out)));
    } catch (const std::exception& e) {
        std::cerr << "stub predictor: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
