#include "isostruct/elements.hpp"

#include <array>
#include <cctype>

#include "isostruct/error.hpp"

namespace isostruct {
namespace {

// Masses are those of the most abundant isotope (12C = 12 exactly), which is
// the convention for rotational spectroscopy. Radii follow Cordero et al.;
// 1.50 Å is used where no value is tabulated here.
constexpr std::array<ElementInfo, kMaxAtomicNumber> kTable = {{
    {1, "H", 1.00782503, 0.31, 1},     {2, "He", 4.00260325, 0.28, 0},
    {3, "Li", 7.01600344, 1.28, 1},    {4, "Be", 9.0121831, 0.96, 2},
    {5, "B", 11.00930536, 0.84, 3},    {6, "C", 12.0, 0.76, 4},
    {7, "N", 14.00307401, 0.71, 3},    {8, "O", 15.99491462, 0.66, 2},
    {9, "F", 18.99840316, 0.57, 1},    {10, "Ne", 19.99244018, 0.58, 0},
    {11, "Na", 22.98976928, 1.66, 1},  {12, "Mg", 23.98504170, 1.41, 2},
    {13, "Al", 26.98153853, 1.21, 3},  {14, "Si", 27.97692653, 1.11, 4},
    {15, "P", 30.97376200, 1.07, 3},   {16, "S", 31.97207117, 1.05, 2},
    {17, "Cl", 34.96885268, 1.02, 1},  {18, "Ar", 39.96238312, 1.06, 0},
    {19, "K", 38.96370649, 2.03, 1},   {20, "Ca", 39.96259086, 1.76, 2},
    {21, "Sc", 44.95590828, 1.70, 0},  {22, "Ti", 47.94794198, 1.60, 0},
    {23, "V", 50.94395704, 1.53, 0},   {24, "Cr", 51.94050623, 1.39, 0},
    {25, "Mn", 54.93804391, 1.39, 0},  {26, "Fe", 55.93493633, 1.32, 0},
    {27, "Co", 58.93319429, 1.26, 0},  {28, "Ni", 57.93534241, 1.24, 0},
    {29, "Cu", 62.92959772, 1.32, 0},  {30, "Zn", 63.92914201, 1.22, 0},
    {31, "Ga", 68.92557350, 1.22, 3},  {32, "Ge", 73.92117776, 1.20, 4},
    {33, "As", 74.92159457, 1.19, 3},  {34, "Se", 79.91652180, 1.20, 2},
    {35, "Br", 78.91833760, 1.20, 1},  {36, "Kr", 83.91149773, 1.16, 0},
    {37, "Rb", 84.91178974, 2.20, 1},  {38, "Sr", 87.90561226, 1.95, 2},
    {39, "Y", 88.90584030, 1.90, 0},   {40, "Zr", 89.90469876, 1.75, 0},
    {41, "Nb", 92.90637300, 1.64, 0},  {42, "Mo", 97.90540482, 1.54, 0},
    {43, "Tc", 97.90721240, 1.47, 0},  {44, "Ru", 101.90434930, 1.46, 0},
    {45, "Rh", 102.90549800, 1.42, 0}, {46, "Pd", 105.90348040, 1.39, 0},
    {47, "Ag", 106.90509160, 1.45, 0}, {48, "Cd", 113.90336509, 1.44, 0},
    {49, "In", 114.90387878, 1.42, 3}, {50, "Sn", 119.90220163, 1.39, 4},
    {51, "Sb", 120.90381200, 1.39, 3}, {52, "Te", 129.90622275, 1.38, 2},
    {53, "I", 126.90447190, 1.39, 1},  {54, "Xe", 131.90415509, 1.40, 0},
    {55, "Cs", 132.90545196, 2.44, 1}, {56, "Ba", 137.90524700, 2.15, 2},
    {57, "La", 138.90636300, 2.07, 0}, {58, "Ce", 139.90544310, 2.04, 0},
    {59, "Pr", 140.90765760, 2.03, 0}, {60, "Nd", 141.90772900, 2.01, 0},
    {61, "Pm", 144.91275590, 1.99, 0}, {62, "Sm", 151.91973970, 1.98, 0},
    {63, "Eu", 152.92123800, 1.98, 0}, {64, "Gd", 157.92410390, 1.96, 0},
    {65, "Tb", 158.92535470, 1.94, 0}, {66, "Dy", 163.92918190, 1.92, 0},
    {67, "Ho", 164.93032880, 1.92, 0}, {68, "Er", 165.93029950, 1.89, 0},
    {69, "Tm", 168.93421790, 1.90, 0}, {70, "Yb", 173.93886640, 1.87, 0},
    {71, "Lu", 174.94077520, 1.87, 0}, {72, "Hf", 179.94655700, 1.75, 0},
    {73, "Ta", 180.94799580, 1.70, 0}, {74, "W", 183.95093092, 1.62, 0},
    {75, "Re", 186.95575010, 1.51, 0}, {76, "Os", 191.96147700, 1.44, 0},
    {77, "Ir", 192.96292160, 1.41, 0}, {78, "Pt", 194.96479170, 1.36, 0},
    {79, "Au", 196.96656879, 1.36, 0}, {80, "Hg", 201.97064340, 1.32, 2},
    {81, "Tl", 204.97442700, 1.45, 1}, {82, "Pb", 207.97665250, 1.46, 2},
    {83, "Bi", 208.98039910, 1.48, 3}, {84, "Po", 208.98243080, 1.40, 2},
    {85, "At", 209.98714790, 1.50, 1}, {86, "Rn", 222.01757710, 1.50, 0},
    {87, "Fr", 223.01973600, 2.60, 1}, {88, "Ra", 226.02541030, 2.21, 2},
    {89, "Ac", 227.02775230, 2.15, 0}, {90, "Th", 232.03805580, 2.06, 0},
    {91, "Pa", 231.03588420, 2.00, 0}, {92, "U", 238.05078700, 1.96, 0},
    {93, "Np", 237.04817360, 1.90, 0}, {94, "Pu", 244.06420530, 1.87, 0},
    {95, "Am", 243.06138130, 1.80, 0}, {96, "Cm", 247.07035410, 1.69, 0},
    {97, "Bk", 247.07030730, 1.50, 0}, {98, "Cf", 251.07958860, 1.50, 0},
    {99, "Es", 252.08298000, 1.50, 0}, {100, "Fm", 257.09510610, 1.50, 0},
    {101, "Md", 258.09843150, 1.50, 0}, {102, "No", 259.10103000, 1.50, 0},
    {103, "Lr", 262.10961000, 1.50, 0}, {104, "Rf", 267.12179000, 1.50, 0},
    {105, "Db", 268.12567000, 1.50, 0}, {106, "Sg", 271.13393000, 1.50, 0},
    {107, "Bh", 272.13826000, 1.50, 0}, {108, "Hs", 270.13429000, 1.50, 0},
    {109, "Mt", 276.15159000, 1.50, 0}, {110, "Ds", 281.16451000, 1.50, 0},
    {111, "Rg", 280.16514000, 1.50, 0}, {112, "Cn", 285.17712000, 1.50, 0},
    {113, "Nh", 284.17873000, 1.50, 0}, {114, "Fl", 289.19042000, 1.50, 0},
    {115, "Mc", 288.19274000, 1.50, 0}, {116, "Lv", 293.20449000, 1.50, 0},
    {117, "Ts", 292.20746000, 1.50, 0}, {118, "Og", 294.21392000, 1.50, 0},
}};

bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(a[i])) !=
        std::tolower(static_cast<unsigned char>(b[i])))
      return false;
  }
  return true;
}

}  // namespace

const ElementInfo& element(int atomic_number) {
  if (atomic_number < 1 || atomic_number > kMaxAtomicNumber)
    throw Error(Errc::UnknownElement, "atomic number " + std::to_string(atomic_number));
  return kTable[static_cast<std::size_t>(atomic_number - 1)];
}

std::optional<int> try_atomic_number_of(std::string_view symbol) {
  for (const auto& e : kTable)
    if (iequals(e.symbol, symbol)) return e.atomic_number;
  return std::nullopt;
}

int atomic_number_of(std::string_view symbol) {
  if (auto z = try_atomic_number_of(symbol)) return *z;
  throw Error(Errc::UnknownElement, "symbol '" + std::string(symbol) + "'");
}

bool is_naturally_abundant(int atomic_number) {
  switch (atomic_number) {
    case 5: case 6: case 7: case 8: case 14: case 16: case 17: case 35: case 80:
      return true;
    default:
      return false;
  }
}

std::optional<double> default_isotope_delta(int atomic_number) {
  switch (atomic_number) {
    case 5: return 10.01293695 - 11.00930536;   // 10B
    case 6: return 1.00335484;                  // 13C
    case 7: return 15.00010890 - 14.00307401;   // 15N
    case 8: return 17.99915961 - 15.99491462;   // 18O
    case 14: return 28.97649466 - 27.97692653;  // 29Si
    case 16: return 33.96786700 - 31.97207117;  // 34S
    case 17: return 36.96590260 - 34.96885268;  // 37Cl
    case 35: return 80.91628970 - 78.91833760;  // 81Br
    case 80: return 199.96832660 - 201.97064340;  // 200Hg
    default: return std::nullopt;
  }
}

}  // namespace isostruct
