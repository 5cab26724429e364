// Generates the bundled synthetic 10-class dataset in the Fashion-MNIST
// IDX layout, for running the toolkit where the real archives are not
// available.

#include <iostream>

#include <CLI11.hpp>

#include "flens/synth.hpp"

int main(int argc, char** argv) {
    CLI::App app{"flens-synth: write a synthetic IDX image dataset"};
    std::string dir = "data/synth10";
    int64_t train_count = 6000;
    int64_t test_count = 2000;
    int64_t image_size = 28;
    uint64_t seed = 0;
    double pixel_noise = 0.08;
    double label_noise = 0.08;
    app.add_option("--dir", dir, "output directory");
    app.add_option("--train-count", train_count);
    app.add_option("--test-count", test_count);
    app.add_option("--image-size", image_size);
    app.add_option("--seed", seed);
    app.add_option("--pixel-noise", pixel_noise);
    app.add_option("--label-noise", label_noise, "fraction of train labels corrupted");
    CLI11_PARSE(app, argc, argv);

    try {
        flens::data::SynthConfig train_cfg;
        train_cfg.count = train_count;
        train_cfg.image_size = image_size;
        train_cfg.seed = seed;
        train_cfg.pixel_noise = pixel_noise;
        train_cfg.label_noise = label_noise;

        flens::data::SynthConfig test_cfg = train_cfg;
        test_cfg.count = test_count;
        test_cfg.seed = seed + 1;
        test_cfg.label_noise = 0.0;  // clean evaluation labels

        flens::data::write_synth_idx_dir(dir, train_cfg, test_cfg);
        std::cout << "wrote " << train_count << " train / " << test_count << " test images to "
                  << dir << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
