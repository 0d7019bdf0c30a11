// Command-line driver: single solves, cell problems and the convergence sweeps.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "hqc/all.hpp"

using namespace hqc;
namespace fs = std::filesystem;

namespace {

struct Options {
    std::string config;
    int n = 0;
    std::vector<double> mesh;
    std::uint64_t seed = 0;
    double tol = 0;
    LoadMode load = LoadMode::Exact;
    std::string out = "results";
    std::string potential;
    std::vector<double> values;
    double amplitude = 0;
    int R = 0;
};

struct Flags {
    CLI::Option *n, *mesh, *seed, *tol, *load, *potential, *values, *amplitude, *R;
};

ExperimentConfig make_config(const Options& o, const Flags& f, ExperimentConfig c) {
    if (f.potential->count()) c = o.potential == "lj" ? ExperimentConfig::nonlinear1d() : ExperimentConfig::linear1d();
    if (f.n->count()) c.N = o.n;
    if (f.mesh->count()) c.H = o.mesh;
    if (f.seed->count()) c.seed = o.seed;
    if (f.tol->count()) c.tol = o.tol;
    if (f.load->count()) c.load = o.load;
    if (f.values->count()) {
        c.values = o.values;
        c.p = static_cast<int>(o.values.size());
    }
    if (f.amplitude->count()) c.amplitude = o.amplitude;
    if (f.R->count()) c.R = o.R;
    c.out_dir = o.out;
    c.validate();
    return c;
}

void emit(const fs::path& dir, const std::string& stem, const CsvTable& t, const std::string& text) {
    write_csv(dir / (stem + ".csv"), t);
    std::ofstream(dir / (stem + "_summary.txt")) << text;
    std::cout << text << "wrote " << (dir / (stem + ".csv")).string() << '\n';
}

void print_row(const char* name, const std::vector<double>& v) {
    std::printf("%s", name);
    for (double x : v) std::printf(" %.15g", x);
    std::printf("\n");
}

void print_2d(const BondTensors2D& bonds) {
    const Cell2DSolution cell = solve_cell_2d(bonds);
    const HomogenizedTensor2D h = homogenize_2d(cell);
    print_row("chi_1", cell.chi[0]);
    print_row("chi_2", cell.chi[1]);
    std::printf("psi0_11 = %.15g I\npsi0_12 = %.15g I\npsi0_22 = %.15g I\n", 4 * h.a(0, 0), 4 * h.a(0, 1), 4 * h.a(1, 1));
}

BondTensors2D bonds_for(int which, const std::vector<double>& k) {
    if (which == 1 && k.size() == 3) return checkerboard_bonds(k[0], k[1], k[2]);
    return case_bonds(which);
}

int report(const fs::path& path) {
    const CsvTable t = read_csv(path);
    int hcol = -1;
    for (std::size_t k = 0; k < t.header.size(); ++k)
        if (t.header[k] == "H") hcol = static_cast<int>(k);
    if (hcol < 0) throw std::runtime_error("report: no H column in " + path.string());
    std::cout << path.filename().string() << ": " << t.rows.size() << " rows\n";
    for (std::size_t k = 0; k < t.header.size(); ++k) {
        const std::string& name = t.header[k];
        if (name.rfind("l2_", 0) != 0 && name.rfind("h1_", 0) != 0 && name.rfind("linf_", 0) != 0) continue;
        std::vector<std::pair<double, double>> pts;
        for (const auto& r : t.rows)
            if (r[k] > 0) pts.emplace_back(r[static_cast<std::size_t>(hcol)], r[k]);
        std::printf("  %-12s", name.c_str());
        try {
            const SlopeFit fit = fit_slope(pts);
            std::printf(" slope %6.3f  rms %.2e", fit.slope, fit.residual);
            if (fit.has_plateau) std::printf("  plateau %.3e (%d pts)", fit.plateau, fit.plateau_points);
        } catch (const std::invalid_argument&) {
            if (!pts.empty()) std::printf(" no decay, final/initial %.3f", pts.back().second / pts.front().second);
        }
        std::printf("\n");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Homogenized quasicontinuum solver for periodic atomistic chains and lattices"};
    app.require_subcommand(1);
    app.fallthrough();

    Options o;
    Flags f{};
    app.set_config("--config", "", "key = value file with any of the long options below");
    f.n = app.add_option("--n", o.n, "number of atoms (per side in 2D)");
    f.mesh = app.add_option("--mesh-list", o.mesh, "mesh sizes H, comma separated")->delimiter(',');
    f.seed = app.add_option("--seed", o.seed, "seed for the random p-study values");
    f.tol = app.add_option("--tol", o.tol, "solver tolerance");
    const std::map<std::string, LoadMode> loads{{"exact", LoadMode::Exact}, {"sampled", LoadMode::Sampled}};
    f.load = app.add_option("--load-mode", o.load, "exact | sampled")->transform(CLI::CheckedTransformer(loads));
    app.add_option("--out", o.out, "output directory")->capture_default_str();
    f.potential = app.add_option("--potential", o.potential, "harmonic | lj")->check(CLI::IsMember({"harmonic", "lj"}));
    f.values = app.add_option("--values", o.values, "per-residue stiffness (harmonic) or distance (lj)")->delimiter(',');
    f.amplitude = app.add_option("--amplitude", o.amplitude, "load amplitude");
    f.R = app.add_option("--range", o.R, "interaction range R");

    auto* full = app.add_subcommand("solve-full", "solve the full atomistic chain");
    auto* hqc_cmd = app.add_subcommand("solve-hqc", "solve the HQC problem on each mesh of the list");
    auto* cell = app.add_subcommand("cell", "corrector of a linear cell problem");
    auto* hom = app.add_subcommand("homogenize", "homogenized tensor of a linear cell problem");
    int which2d = 0;
    std::vector<double> k2d;
    for (auto* sc : {cell, hom}) {
        sc->add_option("--case", which2d, "2D case 1 (checkerboard) or 2 (parity table); omit for 1D --values")
            ->check(CLI::IsMember({1, 2}));
        sc->add_option("--k", k2d, "checkerboard k1,k2,k3 for case 1")->delimiter(',')->expected(3);
    }
    auto* exp = app.add_subcommand("exp", "run a convergence sweep and write CSV tables");
    std::string which;
    exp->add_option("name", which, "linear1d | nonlinear1d | pstudy | case2d-1 | case2d-2")
        ->required()
        ->check(CLI::IsMember({"linear1d", "nonlinear1d", "pstudy", "case2d-1", "case2d-2"}));
    bool pstudy_lj = false;
    exp->add_flag("--lj", pstudy_lj, "p-study with Lennard-Jones bonds");
    auto* rep = app.add_subcommand("report", "refit slopes from a sweep CSV");
    std::string csv;
    rep->add_option("csv", csv, "CSV written by exp")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        const fs::path out(o.out);
        if (*full) {
            const ExperimentConfig c = make_config(o, f, ExperimentConfig::linear1d());
            const AtomisticModel m = build_model(c);
            NewtonOptions nopt;
            nopt.tol = c.tol;
            const FullSolution s = solve_full(m, nopt);
            CsvTable t{{"i", "X", "u"}, {}};
            for (int i = 1; i <= c.N; ++i) t.rows.push_back({double(i), m.grid().position(i), s.u.fn()(i)});
            std::ostringstream text;
            text << "solve-full: N=" << c.N << " iterations " << s.iterations << " residual " << s.residual << " energy "
                 << energy(m, s.u.fn()) << '\n';
            emit(out, "full_" + std::to_string(c.N), t, text.str());
        } else if (*hqc_cmd) {
            ExperimentConfig c = make_config(o, f, ExperimentConfig::linear1d());
            if (!f.mesh->count()) c.H = {1.0 / 16};
            c.validate();
            const AtomisticModel m = build_model(c);
            HqcOptions opt;
            opt.tol = c.tol;
            opt.load = c.load;
            for (double h : c.mesh_list()) {
                const int K = static_cast<int>(std::lround(1.0 / h));
                HqcSolver solver(m, MacroMesh::uniform(c.N, K), opt);
                const HqcSolution s = solver.solve();
                const LatticeFn1D uH = s.uH.lattice(), uHc = solver.reconstruct(s);
                CsvTable t{{"i", "X", "uH", "uHc"}, {}};
                for (int i = 1; i <= c.N; ++i) t.rows.push_back({double(i), m.grid().position(i), uH(i), uHc(i)});
                std::ostringstream text;
                text << "solve-hqc: N=" << c.N << " K=" << K << " iterations " << s.iterations << '\n';
                emit(out, "hqc_" + std::to_string(c.N) + "_K" + std::to_string(K), t, text.str());
            }
        } else if (*cell || *hom) {
            if (which2d) {
                print_2d(bonds_for(which2d, k2d));
                return 0;
            }
            if (o.values.empty()) throw std::invalid_argument("cell: give --values or --case");
            const std::vector<double> chi = solve_cell_nn(o.values);
            if (*cell) print_row("chi", chi);
            std::printf("psi0 = %.15g (harmonic mean %.15g)\n", homogenize_finite_range({o.values}, chi),
                        harmonic_mean(o.values));
        } else if (*exp) {
            if (which == "linear1d" || which == "nonlinear1d") {
                const ExperimentConfig c = make_config(
                    o, f, which == "linear1d" ? ExperimentConfig::linear1d() : ExperimentConfig::nonlinear1d());
                const ErrorReport r = run_1d(c);
                emit(out, c.id, to_csv(r), summary(r));
            } else if (which == "pstudy") {
                ExperimentConfig c = pstudy_lj ? ExperimentConfig::nonlinear1d() : ExperimentConfig::linear1d();
                if (f.n->count()) c.N = o.n;
                if (f.seed->count()) c.seed = o.seed;
                if (f.tol->count()) c.tol = o.tol;
                if (f.load->count()) c.load = o.load;
                const auto rows = run_p_study(c);
                emit(out, std::string("pstudy_") + (pstudy_lj ? "nonlinear" : "linear"), to_csv(rows),
                     "pstudy (" + std::string(pstudy_lj ? "lj" : "harmonic") + "), N=" + std::to_string(c.N) + "\n" +
                         summary(rows));
            } else {
                const int w = which.back() - '0';
                const int N = f.n->count() ? o.n : 256;
                std::vector<int> ts;
                for (double h : o.mesh) ts.push_back(static_cast<int>(std::lround(1.0 / h)));
                const Report2D r = run_2d(w, N, ts, f.tol->count() ? o.tol : 1e-12);
                emit(out, which, to_csv(r), summary(r));
            }
        } else if (*rep) {
            return report(csv);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
