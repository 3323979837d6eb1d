// Regenerate the shipped template model JSON from the procedural builder.
#include <iostream>

#include "cardiomesh/heart_template.hpp"

int main(int argc, char** argv) {
  std::string path = argc > 1 ? argv[1] : "data/template.json";
  try {
    cardio::TemplateModel m = cardio::build_template();
    cardio::save_template(m, path);
    std::cout << "wrote " << path << " (" << m.surface.num_vertices() << " surface vertices, "
              << m.volume.num_nodes() << " nodes, " << m.volume.num_elems() << " tets)\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
