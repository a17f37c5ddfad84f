"""
Permite executar o pacote com `python -m dgre`
"""
import sys

from dgre.main import main

sys.exit(main())
