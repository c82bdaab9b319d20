"""Language-guided representation enhancement for scene graph generation, at desk scale.

Subpackages are plain modules: ``tensor`` (autodiff), ``synth`` (synthetic
benchmark), ``semantics``/``lam``/``lcm``/``eem`` (language modules),
``model`` (baseline and training), ``metrics`` and ``cli``.
"""

__version__ = "0.1.0"
