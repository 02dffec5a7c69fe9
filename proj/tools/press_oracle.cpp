// Brute-force grid optimum of the default scalarised objective on the
// virtual press. Writes the fixture consumed by the acceptance suite.

#include <fstream>
#include <iostream>
#include <limits>

#include <CLI11.hpp>

#include "formbo/acquisition.hpp"
#include "formbo/virtual_press.hpp"

using namespace formbo;

int main(int argc, char** argv) {
    CLI::App app{"Grid optimum of the virtual press"};
    std::string model_name = "three_input";
    int grid = 20;
    std::string out_path;
    double band = 0.05;
    app.add_option("--model", model_name, "three_input or standard")->check(CLI::IsMember({"three_input", "standard"}));
    app.add_option("--grid", grid, "points per continuous dimension")->check(CLI::Range(2, 200));
    app.add_option("--out", out_path, "write JSON fixture here");
    app.add_option("--band", band, "report the grid fraction within this relative band of the optimum");
    CLI11_PARSE(app, argc, argv);

    const PressModel model = model_name == "standard" ? PressModel::standard() : PressModel::three_input();
    const TargetSpec target = TargetSpec::feasibility_default();

    std::vector<std::vector<double>> axes;
    for (const auto& name : model.variable) {
        const auto& p = model.parameter(name);
        if (p.kind == ParameterKind::discrete) {
            axes.push_back(p.values);
            continue;
        }
        std::vector<double> axis(static_cast<std::size_t>(grid));
        for (int i = 0; i < grid; ++i) axis[static_cast<std::size_t>(i)] = p.lo + (p.hi - p.lo) * i / (grid - 1);
        axis.back() = p.hi;
        axes.push_back(std::move(axis));
    }

    std::vector<double> objective;
    std::vector<std::size_t> idx(axes.size(), 0);
    double best = std::numeric_limits<double>::infinity();
    DesignPoint best_x;
    TargetVector best_y;
    for (bool done = false; !done;) {
        DesignPoint x;
        for (std::size_t d = 0; d < axes.size(); ++d) x.set(model.variable[d], axes[d][idx[d]]);
        const TargetVector y = evaluate_final(model, x);
        const double s = target.scalarize(feasibility_vector(y));
        objective.push_back(s);
        if (s < best) {
            best = s;
            best_x = x;
            best_y = y;
        }
        done = true;
        for (std::size_t d = axes.size(); d-- > 0;) {
            if (++idx[d] < axes[d].size()) {
                done = false;
                break;
            }
            idx[d] = 0;
        }
    }

    std::size_t within = 0;
    for (double s : objective) within += s <= best + band * std::abs(best);

    json out;
    out["model"] = model_name;
    out["grid"] = grid;
    out["evaluations"] = objective.size();
    out["objective"] = best;
    out["point"] = json::object();
    for (const auto& [k, v] : best_x) out["point"][k] = v;
    out["targets"] = json::object();
    for (const auto& [k, v] : best_y) out["targets"][k] = v;
    out["fraction_within_band"] = static_cast<double>(within) / static_cast<double>(objective.size());
    out["band"] = band;

    if (!out_path.empty()) {
        std::ofstream f(out_path);
        f << out.dump(2) << '\n';
        if (!f) {
            std::cerr << "cannot write " << out_path << '\n';
            return 1;
        }
    }
    std::cout << out.dump(2) << '\n';
    return 0;
}
