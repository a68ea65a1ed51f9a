#include "esrsim/constants.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace esrsim::constants {

MaterialConstants load_material_constants(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    MaterialConstants c;
    std::string line;
    while (std::getline(is, line)) {
        const auto h = line.find('#');
        if (h != std::string::npos) line.erase(h);
        std::istringstream ls(line);
        std::string key;
        double value;
        if (!(ls >> key >> value)) continue;
        if (key == "si_bulk_modulus_Pa") c.si_bulk_modulus = value;
        else if (key == "si_poisson") c.si_poisson = value;
        else if (key == "al_youngs_Pa") c.al_youngs = value;
        else if (key == "al_poisson") c.al_poisson = value;
        else if (key == "al_expansion_per_K") c.al_expansion = value;
        else if (key == "si_expansion_per_K") c.si_expansion = value;
        else if (key == "delta_T_K") c.delta_T = value;
        else throw std::runtime_error("unknown constants key: " + key);
    }
    return c;
}

void save_material_constants(const MaterialConstants& c, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << "# material constants, version 1\n";
    os << "si_bulk_modulus_Pa " << c.si_bulk_modulus << '\n';
    os << "si_poisson " << c.si_poisson << '\n';
    os << "al_youngs_Pa " << c.al_youngs << '\n';
    os << "al_poisson " << c.al_poisson << '\n';
    os << "al_expansion_per_K " << c.al_expansion << '\n';
    os << "si_expansion_per_K " << c.si_expansion << '\n';
    os << "delta_T_K " << c.delta_T << '\n';
}

}  // namespace esrsim::constants
