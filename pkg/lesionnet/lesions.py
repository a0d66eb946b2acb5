# lesions.py

# Canonical order; every serialized artifact (mask files, reports, channels)
# follows it.
LESIONS = [
    "MA", "iHE", "HaEx", "CWS",
    "vHE", "pHE", "NV", "FiP",
]

LESION_NAMES = {
    "MA": "microaneurysm",
    "iHE": "intraretinal hemorrhage",
    "HaEx": "hard exudate",
    "CWS": "cotton-wool spot",
    "vHE": "vitreous hemorrhage",
    "pHE": "preretinal hemorrhage",
    "NV": "neovascularization",
    "FiP": "fibrous proliferation",
}

# Any of these means proliferative DR.
DR4_LESIONS = ["NV", "vHE", "pHE", "FiP"]

# At least this many iHE blobs make the image severe (DR3).
SEVERE_IHE_COUNT = 20

NUM_GRADES = 5

# Contour/legend colors for overlays, RGB 0-255, one per lesion.
OVERLAY_COLORS = {
    "MA": (255, 64, 64),
    "iHE": (255, 160, 0),
    "HaEx": (255, 255, 0),
    "CWS": (0, 255, 255),
    "vHE": (160, 0, 255),
    "pHE": (255, 0, 200),
    "NV": (0, 255, 0),
    "FiP": (64, 128, 255),
}
