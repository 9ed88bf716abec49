from tdadapt.cli import main

main()
