//! Periodic-table data used by the parser and the featurizers.

/// Atomic symbol and standard atomic weight, indexed by atomic number - 1.
const TABLE: &[(&str, f64)] = &[
    ("H", 1.008),
    ("He", 4.003),
    ("Li", 6.941),
    ("Be", 9.012),
    ("B", 10.812),
    ("C", 12.011),
    ("N", 14.007),
    ("O", 15.999),
    ("F", 18.998),
    ("Ne", 20.180),
    ("Na", 22.990),
    ("Mg", 24.305),
    ("Al", 26.982),
    ("Si", 28.086),
    ("P", 30.974),
    ("S", 32.067),
    ("Cl", 35.453),
    ("Ar", 39.948),
    ("K", 39.098),
    ("Ca", 40.078),
    ("Sc", 44.956),
    ("Ti", 47.867),
    ("V", 50.942),
    ("Cr", 51.996),
    ("Mn", 54.938),
    ("Fe", 55.845),
    ("Co", 58.933),
    ("Ni", 58.693),
    ("Cu", 63.546),
    ("Zn", 65.390),
    ("Ga", 69.723),
    ("Ge", 72.610),
    ("As", 74.922),
    ("Se", 78.960),
    ("Br", 79.904),
    ("Kr", 83.800),
    ("Rb", 85.468),
    ("Sr", 87.620),
    ("Y", 88.906),
    ("Zr", 91.224),
    ("Nb", 92.906),
    ("Mo", 95.940),
    ("Tc", 98.000),
    ("Ru", 101.070),
    ("Rh", 102.906),
    ("Pd", 106.420),
    ("Ag", 107.868),
    ("Cd", 112.411),
    ("In", 114.818),
    ("Sn", 118.710),
    ("Sb", 121.760),
    ("Te", 127.600),
    ("I", 126.904),
    ("Xe", 131.290),
    ("Cs", 132.905),
    ("Ba", 137.327),
];

/// Heavy elements beyond the contiguous block above.
const EXTRA: &[(u8, &str, f64)] = &[
    (78, "Pt", 195.078),
    (79, "Au", 196.967),
    (80, "Hg", 200.590),
    (81, "Tl", 204.383),
    (82, "Pb", 207.200),
    (83, "Bi", 208.980),
];

/// A chemical element identified by its atomic number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Element(u8);

impl Element {
    pub const H: Element = Element(1);
    pub const B: Element = Element(5);
    pub const C: Element = Element(6);
    pub const N: Element = Element(7);
    pub const O: Element = Element(8);
    pub const F: Element = Element(9);
    pub const P: Element = Element(15);
    pub const S: Element = Element(16);
    pub const CL: Element = Element(17);
    pub const AS: Element = Element(33);
    pub const SE: Element = Element(34);
    pub const BR: Element = Element(35);
    pub const I: Element = Element(53);

    /// Looks up an element by its exact (case-sensitive) symbol.
    pub fn from_symbol(symbol: &str) -> Option<Element> {
        if let Some(pos) = TABLE.iter().position(|(s, _)| *s == symbol) {
            return Some(Element(pos as u8 + 1));
        }
        EXTRA.iter().find(|(_, s, _)| *s == symbol).map(|(z, _, _)| Element(*z))
    }

    pub fn from_atomic_number(z: u8) -> Option<Element> {
        let known = (z as usize >= 1 && z as usize <= TABLE.len()) || EXTRA.iter().any(|(n, _, _)| *n == z);
        known.then_some(Element(z))
    }

    pub fn atomic_number(self) -> u8 {
        self.0
    }

    pub fn symbol(self) -> &'static str {
        self.entry().0
    }

    /// Standard atomic weight in daltons.
    pub fn mass(self) -> f64 {
        self.entry().1
    }

    pub fn is_halogen(self) -> bool {
        matches!(self.0, 9 | 17 | 35 | 53)
    }

    /// Elements that may be written without brackets.
    pub fn in_organic_subset(self) -> bool {
        matches!(self.0, 5 | 6 | 7 | 8 | 9 | 15 | 16 | 17 | 35 | 53)
    }

    /// Elements allowed to carry an aromatic (lowercase) flag.
    pub fn may_be_aromatic(self) -> bool {
        matches!(self.0, 5 | 6 | 7 | 8 | 15 | 16 | 33 | 34)
    }

    fn entry(self) -> (&'static str, f64) {
        let z = self.0 as usize;
        if z >= 1 && z <= TABLE.len() {
            TABLE[z - 1]
        } else {
            EXTRA
                .iter()
                .find(|(n, _, _)| *n == self.0)
                .map(|(_, s, m)| (*s, *m))
                .expect("element constructed from a known atomic number")
        }
    }
}
