"""Element symbols, atomic numbers and default valences."""

SYMBOLS = (
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn Ga Ge As Se Br Kr "
    "Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb "
    "Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn"
).split()

ATOMIC_NUMBER = {s: i + 1 for i, s in enumerate(SYMBOLS)}

ORGANIC_SUBSET = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
AROMATIC_SYMBOLS = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S", "se": "Se", "as": "As"}

# neutral valences, smallest first
VALENCES = {
    "B": (3,),
    "C": (4,),
    "N": (3,),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
    "Se": (2, 4, 6),
    "As": (3, 5),
}
# valence used for aromatic atoms, which never expand their octet here
AROMATIC_VALENCE = {"B": 3, "C": 4, "N": 3, "O": 2, "P": 3, "S": 2, "Se": 2, "As": 3}


def allowed_valences(element: str, charge: int, aromatic: bool = False):
    """Bond-order sums (including hydrogens) permitted for an atom, or None if unchecked."""
    if element not in VALENCES:
        return None
    base = (AROMATIC_VALENCE[element],) if aromatic else VALENCES[element]
    if element == "C":
        vals = tuple(v - abs(charge) for v in base)
    elif element == "B":
        vals = tuple(v - charge for v in base)
    else:
        vals = tuple(v + charge for v in base)
    return tuple(v for v in vals if v >= 0)
