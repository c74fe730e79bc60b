from seistomo import main

main()
