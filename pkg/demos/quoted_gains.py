"""Check externally supplied gains (four-decimal values) without any solver."""
from pathlib import Path

from dynalloc import satellite as bm
from dynalloc.results import SynthesisResult
from dynalloc.verify import verify_result

fixtures = Path(__file__).resolve().parents[1] / "fixtures"
for which, cl in (("disturbed", bm.closed_loop()), ("robust", bm.closed_loop(uncertain=True))):
    gains = SynthesisResult.load(fixtures / f"reference_gains_{which}.json")
    print(verify_result(cl, gains, abscissa_threshold=-1e-4).to_text())
