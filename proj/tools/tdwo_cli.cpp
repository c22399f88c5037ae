#include "app.hpp"

int main(int argc, char** argv) { return tdwo::app::main_entry(argc, argv); }
