// nlos: simulate -> reconstruct -> evaluate.
//
// Exit codes: 0 ok, 2 bad arguments, 3 data mismatch, 4 solver divergence.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "nlos/diffprox.hpp"
#include "nlos/forward.hpp"
#include "nlos/grid.hpp"
#include "nlos/io.hpp"
#include "nlos/metrics.hpp"
#include "nlos/projection.hpp"
#include "nlos/solvers.hpp"

namespace fs = std::filesystem;
using namespace nlos;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_usage = 2;
constexpr int exit_data = 3;
constexpr int exit_diverged = 4;

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

double to_double(const std::string& what, const std::string& s) {
    std::size_t pos = 0;
    double v = 0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != s.size() || !std::isfinite(v)) {
        throw std::invalid_argument(what + ": '" + s + "' is not a finite number");
    }
    return v;
}

std::size_t to_count(const std::string& what, const std::string& s) {
    const double v = to_double(what, s);
    if (v < 1 || v != std::floor(v)) throw std::invalid_argument(what + ": expected a positive integer");
    return static_cast<std::size_t>(v);
}

SceneGrid parse_grid(const std::string& spec) {
    const auto f = split(spec, ',');
    if (f.size() != 6) throw std::invalid_argument("--grid expects nx,ny,nz,nt,wall,bin");
    return make_grid(to_count("nx", f[0]), to_count("ny", f[1]), to_count("nz", f[2]),
                     to_count("nt", f[3]), to_double("wall", f[4]), to_double("bin", f[5]));
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw std::invalid_argument("cannot create output directory '" + dir.string() + "'");
    }
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
    std::string scene;
    std::string grid;
    double noise = 0.0;
    double poisson = 0.0;
    std::string mask = "full";
    std::uint64_t seed = 0;
    std::string out;
};

int run_simulate(const SimulateArgs& a) {
    const SceneKind kind = parse_scene_kind(a.scene);
    const SceneGrid g = parse_grid(a.grid);
    if (a.noise < 0 || a.poisson < 0) throw std::invalid_argument("noise levels must be >= 0");
    const ScanMask mask = make_mask(a.mask, g.ny, g.nx);
    ensure_dir(a.out);

    const VoxelAlbedo truth = synth_scene(kind, g);
    const TransientCube clean = render_transient(truth);
    double peak = 0.0;
    for (double v : clean.data.flat()) peak = std::max(peak, std::abs(v));
    const double gauss = a.noise * peak;
    const TransientCube full = add_noise(clean, gauss, a.poisson, a.seed);
    const TransientCube masked = apply_selection(full, mask);

    const fs::path out(a.out);
    write_volume(out / "truth.nvol", truth);
    write_transient(out / "transient_full.ntra", full);
    write_transient(out / "transient.ntra", masked);
    write_mask(out / "mask.pbm", mask);
    write_file_atomic(out / "manifest.txt",
                      format_key_values({{"command", "simulate"},
                                         {"scene", a.scene},
                                         {"nx", std::to_string(g.nx)},
                                         {"ny", std::to_string(g.ny)},
                                         {"nz", std::to_string(g.nz)},
                                         {"nt", std::to_string(g.nt)},
                                         {"wall_size", format_double(g.wall_size)},
                                         {"bin_length", format_double(g.bin_length)},
                                         {"noise_relative", format_double(a.noise)},
                                         {"noise_sigma", format_double(gauss)},
                                         {"signal_peak", format_double(peak)},
                                         {"poisson_scale", format_double(a.poisson)},
                                         {"mask", a.mask},
                                         {"scan_count", std::to_string(mask.count())},
                                         {"seed", std::to_string(a.seed)},
                                         {"format_version", std::to_string(format_version)},
                                         {"truth", "truth.nvol"},
                                         {"transient_full", "transient_full.ntra"},
                                         {"transient", "transient.ntra"},
                                         {"mask_file", "mask.pbm"}}));
    std::cout << "wrote " << (out / "manifest.txt").string() << "\n";
    return exit_ok;
}

// ---------------------------------------------------------------------------

struct ReconstructArgs {
    std::string input;
    std::string mask;
    std::string config;
    std::string method = "slct";
    std::string out;
    std::size_t nz = 0;
};

Field2 albedo_image(const AlbedoMap& a) {
    Field2 img = a.val;
    double m = 0.0;
    for (double v : img.flat()) m = std::max(m, v);
    if (m > 0) for (double& v : img.flat()) v /= m;
    return img;
}

// Depth indices stored verbatim as 16-bit values (idx / 65535 on the [0, 1] scale).
Field2 depth_image(const DepthMap& d) {
    Field2 img(d.idx.ny(), d.idx.nx());
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(d.idx[i]) / 65535.0;
    return img;
}

int run_reconstruct(const ReconstructArgs& a) {
    const Method method = parse_method(a.method);
    const RunConfig rc = read_run_config(a.config);
    const std::size_t nz = a.nz ? a.nz : rc.nz;
    const TransientCube tau0 = read_transient(a.input, nz);
    const ScanMask mask = read_mask(a.mask);
    if (mask.ny() != tau0.grid.ny || mask.nx() != tau0.grid.nx) {
        throw DataError("mask is " + std::to_string(mask.ny()) + "x" + std::to_string(mask.nx()) +
                        " but the transient has " + std::to_string(tau0.grid.ny) + "x" +
                        std::to_string(tau0.grid.nx) + " scan points");
    }
    const SolverParams& prm = rc.params;
    ensure_dir(a.out);
    const fs::path out(a.out);

    std::string report;
    std::string timings;
    VoxelAlbedo u;
    Projection maps;
    if (method == Method::lct) {
        const CgResult r = lct_baseline(apply_selection(tau0, mask), prm);
        report = "# iteration residual\n";
        for (std::size_t i = 0; i < r.residuals.size(); ++i) {
            report += std::to_string(i) + " " + format_double(r.residuals[i]) + "\n";
        }
        report += "# converged " + std::string(r.converged ? "true" : "false") + "\n";
        u = r.u;
        maps = project(u, prm.p);
    } else {
        Reconstruction r = slct_reconstruct(tau0, mask, prm, method);
        const SolveReport& rep = r.report;
        report = "# gamma " + format_double(rep.gamma) + "\n# e1_init " +
                 format_double(rep.e1_init) + "\n# k e1 d_objective i_objective rel_change\n";
        timings = "# init " + format_double(rep.init_seconds) +
                  "\n# k tau_s depth_s albedo_s u_s\n";
        for (const IterationRecord& it : rep.iterations) {
            report += std::to_string(it.k) + " " + format_double(it.e1) + " " +
                      format_double(it.d_objective) + " " + format_double(it.i_objective) + " " +
                      format_double(it.rel_change) + "\n";
            timings += std::to_string(it.k) + " " + format_double(it.seconds.tau) + " " +
                       format_double(it.seconds.depth) + " " + format_double(it.seconds.albedo) +
                       " " + format_double(it.seconds.u) + "\n";
        }
        u = std::move(r.u);
        maps = Projection{std::move(r.albedo), std::move(r.depth)};
    }

    write_volume(out / "volume.nvol", u);
    write_pgm16(out / "projection.pgm", max_intensity_projection(u));
    write_pgm16(out / "albedo.pgm", albedo_image(maps.albedo));
    write_pgm16(out / "depth.pgm", depth_image(maps.depth));
    write_file_atomic(out / "report.txt", report);
    if (!timings.empty()) write_file_atomic(out / "timings.txt", timings);
    write_file_atomic(out / "manifest.txt",
                      format_key_values({{"command", "reconstruct"},
                                         {"method", a.method},
                                         {"input", fs::path(a.input).filename().string()},
                                         {"mask_file", fs::path(a.mask).filename().string()},
                                         {"nz", std::to_string(tau0.grid.nz)},
                                         {"sigma", format_double(prm.sigma)},
                                         {"lambda", format_double(prm.lambda)},
                                         {"rho", format_double(prm.rho)},
                                         {"eta", format_double(prm.eta)},
                                         {"r1", format_double(prm.r1)},
                                         {"r2", format_double(prm.r2)},
                                         {"r3", format_double(prm.r3)},
                                         {"p", std::to_string(prm.p)},
                                         {"k_max", std::to_string(prm.k_max)},
                                         {"fista_iters", std::to_string(prm.fista_iters)},
                                         {"u_iters", std::to_string(prm.u_iters)},
                                         {"admm_iters_D", std::to_string(prm.admm_iters_D)},
                                         {"admm_iters_I", std::to_string(prm.admm_iters_I)},
                                         {"nonneg_clamp", prm.nonneg_clamp ? "true" : "false"},
                                         {"precondition", prm.precondition ? "true" : "false"},
                                         {"operator", prm.op == OperatorKind::fft ? "fft" : "sparse"},
                                         {"lct_mu", format_double(prm.lct_mu)}}));
    std::cout << "wrote " << (out / "volume.nvol").string() << "\n";
    return exit_ok;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
    std::string ref;
    std::string test;
    std::vector<std::string> post;
};

struct PostChain {
    bool truncate = false;
    double lo = 0.0, hi = 100.0;
    double threshold = 0.0;
    double smooth = 0.0;
};

PostChain parse_post(const std::vector<std::string>& items) {
    PostChain pc;
    for (const std::string& item : items) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--post item '" + item + "' needs key=value");
        const std::string key = item.substr(0, eq), val = item.substr(eq + 1);
        if (key == "truncate") {
            const auto f = split(val, ',');
            if (f.size() != 2) throw std::invalid_argument("truncate expects <lo,hi> percentiles");
            pc.truncate = true;
            pc.lo = to_double("truncate lo", f[0]);
            pc.hi = to_double("truncate hi", f[1]);
            if (!(0 <= pc.lo && pc.lo <= pc.hi && pc.hi <= 100)) {
                throw std::invalid_argument("truncate percentiles must satisfy 0 <= lo <= hi <= 100");
            }
        } else if (key == "threshold") {
            pc.threshold = to_double("threshold", val);
            if (pc.threshold < 0 || pc.threshold > 1) throw std::invalid_argument("threshold must be in [0, 1]");
        } else if (key == "smooth") {
            pc.smooth = to_double("smooth", val);
            if (pc.smooth < 0) throw std::invalid_argument("smooth sigma must be >= 0");
        } else {
            throw std::invalid_argument("unknown --post step '" + key +
                                        "' (valid: truncate, threshold, smooth)");
        }
    }
    return pc;
}

int run_evaluate(const EvaluateArgs& a) {
    const PostChain pc = parse_post(a.post);
    const VoxelAlbedo ref = read_volume(a.ref);
    const VoxelAlbedo test = read_volume(a.test);
    if (!ref.data.same_shape(test.data)) {
        throw DataError("reference and test volumes differ in shape");
    }
    if (ref.grid.wall_size != test.grid.wall_size || ref.grid.bin_length != test.grid.bin_length) {
        throw DataError("reference and test volumes differ in geometry");
    }
    const Field2 ref_img = max_intensity_projection(ref);
    Field2 img = max_intensity_projection(test);
    // Fixed order: truncate, threshold, smooth.
    if (pc.truncate) img = normalize_minmax(truncate(img, pc.lo, pc.hi));
    if (pc.threshold > 0) img = normalize_minmax(threshold(img, pc.threshold));
    if (pc.smooth > 0) img = normalize_minmax(gaussian_smooth(img, pc.smooth));

    const double p = psnr(ref_img, img);
    std::cout << "psnr " << (std::isinf(p) ? std::string("INF") : format_double(p)) << "\n";
    std::cout << "ssim " << format_double(ssim(ref_img, img)) << "\n";
    std::cout << "rel_error " << format_double(rel_error(img.flat(), ref_img.flat())) << "\n";
    return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Confocal NLOS simulation, reconstruction and evaluation"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* s = app.add_subcommand("simulate", "render a synthetic scene and its transients");
    s->add_option("--scene", sim.scene, "plane | sphere_cap | letter_T")->required();
    s->add_option("--grid", sim.grid, "nx,ny,nz,nt,wall_m,bin_m")->required();
    s->add_option("--noise", sim.noise, "Gaussian noise sigma as a fraction of the peak signal");
    s->add_option("--poisson", sim.poisson, "shot noise, counts per unit intensity (0 = off)");
    s->add_option("--mask", sim.mask, "full | every_k:<n> | random:<count>:<seed>");
    s->add_option("--seed", sim.seed, "noise seed");
    s->add_option("--out", sim.out, "output directory")->required();

    ReconstructArgs rec;
    auto* r = app.add_subcommand("reconstruct", "recover the hidden volume from a transient");
    r->add_option("--input", rec.input, "NTRA transient")->required();
    r->add_option("--mask", rec.mask, "PBM scan mask")->required();
    r->add_option("--config", rec.config, "key=value run configuration")->required();
    r->add_option("--method", rec.method, "slct | l1 | l1-inpaint | lct");
    r->add_option("--nz", rec.nz, "depth voxels (default: config nz, else nt/2)");
    r->add_option("--out", rec.out, "output directory")->required();

    EvaluateArgs ev;
    auto* e = app.add_subcommand("evaluate", "compare projections of two volumes");
    e->add_option("--ref", ev.ref, "reference NVOL")->required();
    e->add_option("--test", ev.test, "test NVOL")->required();
    e->add_option("--post", ev.post, "truncate=<lo,hi> threshold=<f> smooth=<sigma>");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        app.exit(ex);
        return exit_usage;
    }

    try {
        if (*s) return run_simulate(sim);
        if (*r) return run_reconstruct(rec);
        if (*e) return run_evaluate(ev);
    } catch (const DataError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return exit_data;
    } catch (const DivergenceError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return exit_diverged;
    } catch (const std::invalid_argument& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return exit_usage;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return exit_usage;
}
